//! Adapter-only optimization of the masked flow loss.

use cubepano::imageio::{Optimizer, RunConfig};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::dataset::{ToyDataset, TOY_CHANNELS, TOY_THEMES};
use super::path::{flow_loss, flow_loss_grad, sample_switch, FlowBatch};
use crate::error::{ModelError, Result};
use crate::jointface::adapter::AdapterParams;
use crate::jointface::{FaceLatents, JointFaceNet};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Seeded sub-streams of one training run.
const DATA_STREAM: u64 = 0;
const SWITCH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Steps per running-average window in [`TrainReport`].
    pub window: usize,
}

impl TrainOptions {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainOptions {
            steps: cfg.steps,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            optimizer: cfg.optimizer,
            seed: cfg.seed,
            window: 100,
        }
    }
}

/// Optimizer moments for every adapter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<AdapterParams>,
    v: Vec<AdapterParams>,
    steps: i32,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, net: &JointFaceNet) -> Self {
        let zeros: Vec<AdapterParams> = net.adapters.iter().map(AdapterParams::zeros_like).collect();
        OptimizerState { kind, m: zeros.clone(), v: zeros, steps: 0 }
    }

    fn apply(&mut self, net: &mut JointFaceNet, grads: &[AdapterParams], lr: f64) {
        self.steps += 1;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(self.steps), 1.0 - ADAM_BETA2.powi(self.steps));
        for (i, adapter) in net.adapters.iter_mut().enumerate() {
            let params = adapter.tensors_mut();
            let (m, v) = (self.m[i].tensors_mut(), self.v[i].tensors_mut());
            for (((p, g), m), v) in params.into_iter().zip(grads[i].tensors()).zip(m).zip(v) {
                match self.kind {
                    Optimizer::Sgd => {
                        for (p, g) in p.iter_mut().zip(g) {
                            *p -= lr * g;
                        }
                    }
                    Optimizer::Adam => {
                        for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}

/// Mean loss over `batch` and its gradient w.r.t. every adapter tensor.
pub fn batch_gradients(net: &JointFaceNet, batch: &[FlowBatch]) -> Result<(f64, Vec<AdapterParams>)> {
    if batch.is_empty() {
        return Err(ModelError::domain("empty batch"));
    }
    let per_sample = batch
        .par_iter()
        .map(|b| {
            let (pred, cache) = net.forward_with_cache(&b.noisy, b.t, b.cond)?;
            let (loss, dpred) = flow_loss_grad(&pred, b)?;
            Ok((loss, net.backward(&cache, &dpred)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<AdapterParams> = net.adapters.iter().map(AdapterParams::zeros_like).collect();
    for (l, g) in per_sample {
        loss += l * scale;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, b) in acc.tensors_mut().into_iter().zip(gi.tensors()) {
                a.iter_mut().zip(b).for_each(|(a, b)| *a += scale * b);
            }
        }
    }
    Ok((loss, grads))
}

/// Mean loss over `batch` without gradients.
fn batch_gradients_loss(net: &JointFaceNet, batch: &[FlowBatch]) -> Result<f64> {
    let losses = batch
        .par_iter()
        .map(|b| flow_loss(&net.forward(&b.noisy, b.t, b.cond)?, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// One optimizer step on the adapters; returns the pre-step loss. A
/// non-finite loss or gradient aborts the step with no parameter change.
pub fn train_step(net: &mut JointFaceNet, opt: &mut OptimizerState, batch: &[FlowBatch], lr: f64) -> Result<f64> {
    let (loss, grads) = batch_gradients(net, batch)?;
    if !loss.is_finite() {
        return Err(ModelError::Training(format!("loss is {loss}")));
    }
    if !grads.iter().all(|g| g.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))) {
        return Err(ModelError::Training("non-finite gradient".into()));
    }
    opt.apply(net, &grads, lr);
    Ok(loss)
}

/// Per-step losses of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub window: usize,
    /// Mean loss of the untrained network over the first window's batches.
    pub initial_loss: f64,
}

impl TrainReport {
    fn window_mean(&self, range: std::ops::Range<usize>) -> f64 {
        let xs = &self.losses[range];
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }

    /// Running-average loss before the first update.
    pub fn initial_average(&self) -> f64 {
        self.initial_loss
    }

    /// Mean loss of the last window.
    pub fn final_average(&self) -> f64 {
        self.window_mean(self.losses.len().saturating_sub(self.window)..self.losses.len())
    }
}

/// Serial training loop over deterministic batches drawn from a dataset.
pub struct Trainer<'a> {
    net: JointFaceNet,
    opt: OptimizerState,
    options: TrainOptions,
    scenes: Vec<(FaceLatents, usize)>,
    data_rng: ChaCha8Rng,
    switch_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    _dataset: std::marker::PhantomData<&'a ToyDataset>,
}

/// Independent sub-stream `stream` of `seed`.
pub fn sub_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Trainer<'a> {
    pub fn new(net: JointFaceNet, dataset: &'a ToyDataset, options: TrainOptions) -> Result<Self> {
        let cfg = net.config();
        if dataset.scenes.is_empty() {
            return Err(ModelError::Config("empty dataset".into()));
        }
        if dataset.face_size != cfg.face_size || cfg.latent_channels != TOY_CHANNELS {
            return Err(ModelError::Config(format!(
                "dataset faces {}x{}x{TOY_CHANNELS} do not fit a network for {}x{}x{}",
                dataset.face_size, dataset.face_size, cfg.face_size, cfg.face_size, cfg.latent_channels
            )));
        }
        if cfg.vocab < TOY_THEMES {
            return Err(ModelError::Config(format!("vocab {} is below {TOY_THEMES} themes", cfg.vocab)));
        }
        if options.batch_size == 0 || options.window == 0 {
            return Err(ModelError::Config("batch size and window must be positive".into()));
        }
        if !(options.lr.is_finite() && options.lr >= 0.0) {
            return Err(ModelError::Config(format!("learning rate {} is invalid", options.lr)));
        }
        let opt = OptimizerState::new(options.optimizer, &net);
        let scenes = dataset.scenes.iter().map(|s| (s.latents(), s.cond)).collect();
        Ok(Trainer {
            net,
            opt,
            scenes,
            data_rng: sub_stream(options.seed, DATA_STREAM),
            switch_rng: sub_stream(options.seed, SWITCH_STREAM),
            noise_rng: sub_stream(options.seed, NOISE_STREAM),
            options,
            _dataset: std::marker::PhantomData,
        })
    }

    pub fn net(&self) -> &JointFaceNet {
        &self.net
    }

    pub fn into_net(self) -> JointFaceNet {
        self.net
    }

    /// Next batch: uniform scene, `t ~ U[0, 1)`, fair switch, normal noise.
    pub fn next_batch(&mut self) -> Result<Vec<FlowBatch>> {
        (0..self.options.batch_size)
            .map(|_| {
                let idx = self.data_rng.random_range(0..self.scenes.len());
                let t: f64 = self.data_rng.random();
                let gamma = sample_switch(&mut self.switch_rng);
                let (clean, cond) = &self.scenes[idx];
                let noise = Array4::from_shape_simple_fn(clean.dim(), || StandardNormal.sample(&mut self.noise_rng));
                FlowBatch::new(clean.clone(), noise, t, gamma, *cond)
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        train_step(&mut self.net, &mut self.opt, &batch, self.options.lr)
    }

    /// Mean loss of the current network over the next `n` batches, leaving
    /// the batch streams where they were.
    pub fn preview_loss(&mut self, n: usize) -> Result<f64> {
        let saved = (self.data_rng.clone(), self.switch_rng.clone(), self.noise_rng.clone());
        let mut total = 0.0;
        for _ in 0..n {
            let batch = self.next_batch()?;
            total += batch_gradients_loss(&self.net, &batch)?;
        }
        (self.data_rng, self.switch_rng, self.noise_rng) = saved;
        Ok(total / n.max(1) as f64)
    }

    /// Runs `options.steps` steps, reporting `(step, loss)` after each.
    pub fn run(&mut self, mut progress: impl FnMut(usize, f64)) -> Result<TrainReport> {
        let window = self.options.window.min(self.options.steps.max(1));
        let initial_loss = self.preview_loss(window)?;
        let mut losses = Vec::with_capacity(self.options.steps);
        for i in 0..self.options.steps {
            let loss = self.step()?;
            progress(i, loss);
            losses.push(loss);
        }
        Ok(TrainReport { losses, window, initial_loss })
    }
}
