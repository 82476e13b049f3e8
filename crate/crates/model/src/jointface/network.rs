//! The toy diffusion transformer with one joint-face adapter per block.
//!
//! Block order: per-face self-attention, adapter, condition
//! cross-attention, MLP. Only the adapters are trainable.

use std::path::Path;

use cubepano::imageio::RunConfig;
use cubepano::Direction3;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adapter::{adapter_backward_seq, adapter_forward_seq, AdapterCache, AdapterParams, ADAPTER_TENSORS};
use super::backbone::ToyBackboneParams;
use super::ops::{
    attention, attention_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, sinusoidal_embedding,
    AttentionCache, LayerNormCache, RopeTable,
};
use super::tokens::{patchify, token_dirs, unpatchify, FaceLatents};
use crate::error::{ModelError, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
    pub face_size: usize,
    pub patch: usize,
    pub latent_channels: usize,
    pub rope_base: f64,
    pub vocab: usize,
    pub cond_tokens: usize,
    pub mlp_ratio: usize,
}

impl NetConfig {
    pub fn from_run(cfg: &RunConfig) -> Result<Self> {
        let net = NetConfig {
            depth: cfg.depth,
            channels: cfg.channels,
            heads: cfg.heads,
            face_size: cfg.face_size,
            patch: cfg.patch,
            latent_channels: cfg.latent_channels,
            rope_base: cfg.rope_base,
            vocab: cfg.vocab,
            cond_tokens: cfg.cond_tokens,
            mlp_ratio: cfg.mlp_ratio,
        };
        net.validate()?;
        Ok(net)
    }

    /// Four tokens per face, 12 channels, 2 heads, 2 blocks.
    pub fn tiny() -> Self {
        NetConfig {
            depth: 2,
            channels: 12,
            heads: 2,
            face_size: 4,
            patch: 2,
            latent_channels: 2,
            rope_base: 1e4,
            vocab: 3,
            cond_tokens: 2,
            mlp_ratio: 2,
        }
    }

    pub fn grid(&self) -> usize {
        self.face_size / self.patch
    }

    pub fn tokens_per_face(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_features(&self) -> usize {
        self.patch * self.patch * self.latent_channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("channels", self.channels),
            ("heads", self.heads),
            ("face_size", self.face_size),
            ("patch", self.patch),
            ("latent_channels", self.latent_channels),
            ("vocab", self.vocab),
            ("cond_tokens", self.cond_tokens),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.channels.is_multiple_of(self.heads) || !(self.channels / self.heads).is_multiple_of(6) {
            return Err(ModelError::Config(format!(
                "{} channels over {} heads must give a head dimension divisible by 6",
                self.channels, self.heads
            )));
        }
        if !self.face_size.is_multiple_of(self.patch) {
            return Err(ModelError::Config(format!(
                "face_size {} is not a multiple of patch {}",
                self.face_size, self.patch
            )));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return Err(ModelError::Config(format!("rope_base {} must exceed 1", self.rope_base)));
        }
        Ok(())
    }

    /// `key = value` lines readable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        format!(
            "depth = {}\nchannels = {}\nheads = {}\nface_size = {}\npatch = {}\nlatent_channels = {}\n\
             rope_base = {}\nvocab = {}\ncond_tokens = {}\nmlp_ratio = {}\n",
            self.depth,
            self.channels,
            self.heads,
            self.face_size,
            self.patch,
            self.latent_channels,
            self.rope_base,
            self.vocab,
            self.cond_tokens,
            self.mlp_ratio
        )
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        NetConfig::from_run(&RunConfig::parse(text, origin)?)
    }
}

/// A named parameter tensor and whether training may change it.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    q1: Array2<f64>,
    k1: Array2<f64>,
    v1: Array2<f64>,
    attn1: AttentionCache,
    adapter: Option<AdapterCache>,
    ln2: LayerNormCache,
    q2: Array2<f64>,
    kc: Array2<f64>,
    vc: Array2<f64>,
    attn2: AttentionCache,
    ln3: LayerNormCache,
    u: Array2<f64>,
}

/// Activations retained by [`JointFaceNet::forward_with_cache`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    rope: RopeTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointFaceNet {
    config: NetConfig,
    pub backbone: ToyBackboneParams,
    pub adapters: Vec<AdapterParams>,
    dirs: Vec<Direction3>,
    rope: RopeTable,
    pos: Array2<f64>,
}

impl JointFaceNet {
    /// Draws the frozen backbone, then the adapters, from one seeded stream.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = ToyBackboneParams::init(
            config.channels,
            config.depth,
            config.patch_features(),
            config.vocab,
            config.cond_tokens,
            config.mlp_ratio,
            &mut rng,
        );
        let adapters = (0..config.depth)
            .map(|_| AdapterParams::init(config.channels, config.heads, config.rope_base, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let dirs = token_dirs(config.grid())?;
        let rope = RopeTable::new(&dirs, config.channels / config.heads, config.rope_base)?;
        let pos = position_embedding(config.grid(), config.channels);
        Ok(JointFaceNet { config, backbone, adapters, dirs, rope, pos })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Token directions, face-major.
    pub fn dirs(&self) -> &[Direction3] {
        &self.dirs
    }

    /// Velocity prediction for the six noisy faces `x` at time `t`.
    pub fn forward(&self, x: &FaceLatents, t: f64, cond: usize) -> Result<FaceLatents> {
        Ok(self.run(x, t, cond, &self.rope, true, false)?.0)
    }

    /// Forward with adapters removed.
    pub fn backbone_forward(&self, x: &FaceLatents, t: f64, cond: usize) -> Result<FaceLatents> {
        Ok(self.run(x, t, cond, &self.rope, false, false)?.0)
    }

    /// Forward with caller-supplied token directions.
    pub fn forward_with_dirs(&self, x: &FaceLatents, t: f64, cond: usize, dirs: &[Direction3]) -> Result<FaceLatents> {
        if dirs.len() != self.dirs.len() {
            return Err(ModelError::domain(format!("{} directions for {} tokens", dirs.len(), self.dirs.len())));
        }
        let rope = RopeTable::new(dirs, self.config.channels / self.config.heads, self.config.rope_base)?;
        Ok(self.run(x, t, cond, &rope, true, false)?.0)
    }

    pub fn forward_with_cache(&self, x: &FaceLatents, t: f64, cond: usize) -> Result<(FaceLatents, ForwardCache)> {
        let (out, cache) = self.run(x, t, cond, &self.rope, true, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn check_inputs(&self, x: &FaceLatents, t: f64, cond: usize) -> Result<()> {
        let c = &self.config;
        let want = (6, c.face_size, c.face_size, c.latent_channels);
        if x.dim() != want {
            return Err(ModelError::domain(format!("latents {:?}, expected {want:?}", x.dim())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(ModelError::domain(format!("timestep {t} outside [0, 1]")));
        }
        if cond >= c.vocab {
            return Err(ModelError::domain(format!("condition {cond} outside vocabulary of {}", c.vocab)));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &FaceLatents,
        t: f64,
        cond: usize,
        rope: &RopeTable,
        use_adapters: bool,
        keep: bool,
    ) -> Result<(FaceLatents, Option<ForwardCache>)> {
        self.check_inputs(x, t, cond)?;
        let cfg = &self.config;
        let bb = &self.backbone;
        let heads = cfg.heads;
        let mut h = patchify(x, cfg.patch).dot(&bb.patch_w) + &bb.patch_b + &self.pos;
        h += &sinusoidal_embedding(1000.0 * t, cfg.channels, 10_000.0).dot(&bb.time_w);
        let ctx = bb
            .cond_table
            .row(cond)
            .to_owned()
            .into_shape_with_order((cfg.cond_tokens, cfg.channels))
            .expect("cond table row holds cond_tokens * channels values");
        let mut caches = Vec::new();
        for (blk, adapter) in bb.blocks.iter().zip(&self.adapters) {
            let ln1 = layer_norm(h.view());
            let q1 = ln1.xhat.dot(&blk.self_wq);
            let k1 = ln1.xhat.dot(&blk.self_wk);
            let v1 = ln1.xhat.dot(&blk.self_wv);
            let (a1, attn1) = attention(q1.view(), k1.view(), v1.view(), heads, 6);
            h += &a1.dot(&blk.self_wo);

            let adapter_cache = if use_adapters {
                let (y, ac) = adapter_forward_seq(&h, rope, adapter);
                h = y;
                Some(ac)
            } else {
                None
            };

            let ln2 = layer_norm(h.view());
            let q2 = ln2.xhat.dot(&blk.cross_wq);
            let kc = ctx.dot(&blk.cross_wk);
            let vc = ctx.dot(&blk.cross_wv);
            let (a2, attn2) = attention(q2.view(), kc.view(), vc.view(), heads, 1);
            h += &a2.dot(&blk.cross_wo);

            let ln3 = layer_norm(h.view());
            let u = ln3.xhat.dot(&blk.mlp_w1) + &blk.mlp_b1;
            h += &(u.mapv(gelu).dot(&blk.mlp_w2) + &blk.mlp_b2);

            if keep {
                caches.push(BlockCache {
                    ln1,
                    q1,
                    k1,
                    v1,
                    attn1,
                    adapter: adapter_cache,
                    ln2,
                    q2,
                    kc,
                    vc,
                    attn2,
                    ln3,
                    u,
                });
            }
        }
        let final_ln = layer_norm(h.view());
        let out_tokens = final_ln.xhat.dot(&bb.head_w) + &bb.head_b;
        let out = unpatchify(&out_tokens, cfg.face_size, cfg.patch, cfg.latent_channels);
        let cache = keep.then(|| ForwardCache { blocks: caches, final_ln, rope: rope.clone() });
        Ok((out, cache))
    }

    /// Gradients of `sum(dout * output)` w.r.t. every adapter tensor.
    pub fn backward(&self, cache: &ForwardCache, dout: &FaceLatents) -> Vec<AdapterParams> {
        let cfg = &self.config;
        let bb = &self.backbone;
        let mut grads: Vec<AdapterParams> = self.adapters.iter().map(AdapterParams::zeros_like).collect();
        let dtok = patchify(dout, cfg.patch);
        let mut dh = layer_norm_backward(&cache.final_ln, dtok.dot(&bb.head_w.t()).view());
        for i in (0..cfg.depth).rev() {
            let (blk, bc) = (&bb.blocks[i], &cache.blocks[i]);

            let du = dh.dot(&blk.mlp_w2.t()) * bc.u.mapv(gelu_grad);
            dh += &layer_norm_backward(&bc.ln3, du.dot(&blk.mlp_w1.t()).view());

            let da2 = dh.dot(&blk.cross_wo.t());
            let (dq2, _, _) = attention_backward(bc.q2.view(), bc.kc.view(), bc.vc.view(), &bc.attn2, da2.view());
            dh += &layer_norm_backward(&bc.ln2, dq2.dot(&blk.cross_wq.t()).view());

            let ac = bc.adapter.as_ref().expect("training forward keeps adapter activations");
            dh = adapter_backward_seq(ac, &cache.rope, &self.adapters[i], &dh, &mut grads[i]);

            if i > 0 {
                let da1 = dh.dot(&blk.self_wo.t());
                let (dq1, dk1, dv1) =
                    attention_backward(bc.q1.view(), bc.k1.view(), bc.v1.view(), &bc.attn1, da1.view());
                let dxhat = dq1.dot(&blk.self_wq.t()) + dk1.dot(&blk.self_wk.t()) + dv1.dot(&blk.self_wv.t());
                dh += &layer_norm_backward(&bc.ln1, dxhat.view());
            }
        }
        grads
    }

    /// Every parameter tensor, backbone first.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out: Vec<NamedTensor> = self
            .backbone
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor { name, shape, data, trainable: false })
            .collect();
        for (i, a) in self.adapters.iter().enumerate() {
            for ((name, shape), data) in ADAPTER_TENSORS.iter().zip(a.shapes()).zip(a.tensors()) {
                out.push(NamedTensor { name: format!("adapter{i}.{name}"), shape, data, trainable: true });
            }
        }
        out
    }

    /// Mutable views in [`JointFaceNet::named_tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.backbone.tensors_mut();
        for a in &mut self.adapters {
            out.extend(a.tensors_mut());
        }
        out
    }
}

/// Two-axis sinusoidal position of each token inside its face; identical
/// for all six faces.
fn position_embedding(grid: usize, channels: usize) -> Array2<f64> {
    let half = channels / 2;
    let mut pos = Array2::zeros((6 * grid * grid, channels));
    for (k, mut row) in pos.rows_mut().into_iter().enumerate() {
        let (gy, gx) = ((k / grid) % grid, k % grid);
        let ex: Array1<f64> = sinusoidal_embedding(gx as f64, half, 100.0);
        let ey: Array1<f64> = sinusoidal_embedding(gy as f64, half, 100.0);
        row.slice_mut(ndarray::s![..half]).assign(&ex);
        row.slice_mut(ndarray::s![half..2 * half]).assign(&ey);
    }
    pos
}
