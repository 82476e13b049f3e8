//! Frozen stand-in backbone: random weights drawn once and never trained.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Frozen tensors of one transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub self_wq: Array2<f64>,
    pub self_wk: Array2<f64>,
    pub self_wv: Array2<f64>,
    pub self_wo: Array2<f64>,
    pub cross_wq: Array2<f64>,
    pub cross_wk: Array2<f64>,
    pub cross_wv: Array2<f64>,
    pub cross_wo: Array2<f64>,
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
}

/// Frozen tensors of the whole backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBackboneParams {
    /// `(patch*patch*latent_channels, C)`.
    pub patch_w: Array2<f64>,
    pub patch_b: Array1<f64>,
    /// Projects sinusoidal time features, `(C, C)`.
    pub time_w: Array2<f64>,
    /// One row of `cond_tokens * C` values per condition id.
    pub cond_table: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn normal(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl ToyBackboneParams {
    pub fn init(
        channels: usize,
        depth: usize,
        patch_features: usize,
        vocab: usize,
        cond_tokens: usize,
        mlp_ratio: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c = channels;
        let hidden = c * mlp_ratio;
        let patch_w = normal(patch_features, c, patch_features, rng);
        let time_w = normal(c, c, c, rng);
        let cond_table = normal(vocab, cond_tokens * c, 1, rng);
        let blocks = (0..depth)
            .map(|_| BlockParams {
                self_wq: normal(c, c, c, rng),
                self_wk: normal(c, c, c, rng),
                self_wv: normal(c, c, c, rng),
                self_wo: normal(c, c, c, rng),
                cross_wq: normal(c, c, c, rng),
                cross_wk: normal(c, c, c, rng),
                cross_wv: normal(c, c, c, rng),
                cross_wo: normal(c, c, c, rng),
                mlp_w1: normal(c, hidden, c, rng),
                mlp_b1: Array1::zeros(hidden),
                mlp_w2: normal(hidden, c, hidden, rng),
                mlp_b2: Array1::zeros(c),
            })
            .collect();
        let head_w = normal(c, patch_features, c, rng);
        ToyBackboneParams {
            patch_w,
            patch_b: Array1::zeros(c),
            time_w,
            cond_table,
            blocks,
            head_w,
            head_b: Array1::zeros(patch_features),
        }
    }

    /// Every tensor as `(name, shape, values)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        push2(&mut out, "backbone.patch_w".into(), &self.patch_w);
        push1(&mut out, "backbone.patch_b".into(), &self.patch_b);
        push2(&mut out, "backbone.time_w".into(), &self.time_w);
        push2(&mut out, "backbone.cond_table".into(), &self.cond_table);
        for (i, b) in self.blocks.iter().enumerate() {
            let n = |s: &str| format!("backbone.block{i}.{s}");
            push2(&mut out, n("self_wq"), &b.self_wq);
            push2(&mut out, n("self_wk"), &b.self_wk);
            push2(&mut out, n("self_wv"), &b.self_wv);
            push2(&mut out, n("self_wo"), &b.self_wo);
            push2(&mut out, n("cross_wq"), &b.cross_wq);
            push2(&mut out, n("cross_wk"), &b.cross_wk);
            push2(&mut out, n("cross_wv"), &b.cross_wv);
            push2(&mut out, n("cross_wo"), &b.cross_wo);
            push2(&mut out, n("mlp_w1"), &b.mlp_w1);
            push1(&mut out, n("mlp_b1"), &b.mlp_b1);
            push2(&mut out, n("mlp_w2"), &b.mlp_w2);
            push1(&mut out, n("mlp_b2"), &b.mlp_b2);
        }
        push2(&mut out, "backbone.head_w".into(), &self.head_w);
        push1(&mut out, "backbone.head_b".into(), &self.head_b);
        out
    }

    /// Mutable views in [`ToyBackboneParams::tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            slice_mut(&mut self.patch_w),
            slice_mut1(&mut self.patch_b),
            slice_mut(&mut self.time_w),
            slice_mut(&mut self.cond_table),
        ];
        for b in &mut self.blocks {
            out.extend([
                slice_mut(&mut b.self_wq),
                slice_mut(&mut b.self_wk),
                slice_mut(&mut b.self_wv),
                slice_mut(&mut b.self_wo),
                slice_mut(&mut b.cross_wq),
                slice_mut(&mut b.cross_wk),
                slice_mut(&mut b.cross_wv),
                slice_mut(&mut b.cross_wo),
                slice_mut(&mut b.mlp_w1),
                slice_mut1(&mut b.mlp_b1),
                slice_mut(&mut b.mlp_w2),
                slice_mut1(&mut b.mlp_b2),
            ]);
        }
        out.push(slice_mut(&mut self.head_w));
        out.push(slice_mut1(&mut self.head_b));
        out
    }
}

fn push2<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, a: &'a Array2<f64>) {
    out.push((name, a.shape().to_vec(), a.as_slice().expect("standard layout")));
}

fn push1<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, a: &'a Array1<f64>) {
    out.push((name, a.shape().to_vec(), a.as_slice().expect("standard layout")));
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice_mut1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}
