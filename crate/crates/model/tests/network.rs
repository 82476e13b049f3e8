use cubepano_model::jointface::{FaceLatents, JointFaceNet, NetConfig};
use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn default_config() -> NetConfig {
    NetConfig {
        depth: 4,
        channels: 24,
        heads: 2,
        face_size: 16,
        patch: 2,
        latent_channels: 3,
        rope_base: 1e4,
        vocab: 4,
        cond_tokens: 4,
        mlp_ratio: 2,
    }
}

fn latents(cfg: &NetConfig, seed: u64) -> FaceLatents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn((6, cfg.face_size, cfg.face_size, cfg.latent_channels), || rng.random_range(-1.5..1.5))
}

fn active_net(cfg: NetConfig, seed: u64) -> JointFaceNet {
    let mut net = JointFaceNet::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let dist = Normal::new(0.0, 0.2).unwrap();
    for a in &mut net.adapters {
        a.w_o.mapv_inplace(|_| dist.sample(&mut rng));
    }
    net
}

#[test]
fn zero_init_network_equals_backbone() {
    let net = JointFaceNet::new(default_config(), 9).unwrap();
    let x = latents(net.config(), 3);
    let full = net.forward(&x, 0.42, 2).unwrap();
    let bare = net.backbone_forward(&x, 0.42, 2).unwrap();
    let max = (&full - &bare).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(max <= 1e-6, "{max}");
}

#[test]
fn active_adapters_change_output() {
    let net = active_net(default_config(), 9);
    let x = latents(net.config(), 3);
    let diff = &net.forward(&x, 0.42, 2).unwrap() - &net.backbone_forward(&x, 0.42, 2).unwrap();
    assert!(diff.iter().any(|d| d.abs() > 1e-3));
}

#[test]
fn permuting_faces_and_directions_permutes_outputs() {
    let cfg = NetConfig { face_size: 8, ..default_config() };
    let net = active_net(cfg, 4);
    let n = net.config().tokens_per_face();
    let x = latents(net.config(), 5);
    // Slot s of the permuted panorama holds original face perm[s].
    let perm = [0, 3, 1, 5, 2, 4];
    let mut xp = x.clone();
    let mut dirs = Vec::with_capacity(6 * n);
    for (slot, &src) in perm.iter().enumerate() {
        xp.slice_mut(s![slot, .., .., ..]).assign(&x.slice(s![src, .., .., ..]));
        dirs.extend_from_slice(&net.dirs()[src * n..(src + 1) * n]);
    }
    let out = net.forward(&x, 0.6, 1).unwrap();
    let outp = net.forward_with_dirs(&xp, 0.6, 1, &dirs).unwrap();
    for (slot, &src) in perm.iter().enumerate() {
        let d = &outp.slice(s![slot, .., .., ..]) - &out.slice(s![src, .., .., ..]);
        let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-10, "slot {slot}: {max}");
    }
}

#[test]
fn directions_matter_once_adapters_are_active() {
    let cfg = NetConfig { face_size: 8, ..default_config() };
    let net = active_net(cfg, 4);
    let n = net.config().tokens_per_face();
    let x = latents(net.config(), 5);
    let mut dirs = net.dirs().to_vec();
    dirs[..n].rotate_left(1);
    let a = net.forward(&x, 0.6, 1).unwrap();
    let b = net.forward_with_dirs(&x, 0.6, 1, &dirs).unwrap();
    assert_ne!(a, b);
}

#[test]
fn forward_is_deterministic() {
    let net = active_net(default_config(), 11);
    let x = latents(net.config(), 12);
    assert_eq!(net.forward(&x, 0.3, 0).unwrap(), net.forward(&x, 0.3, 0).unwrap());
    assert_eq!(JointFaceNet::new(default_config(), 3).unwrap(), JointFaceNet::new(default_config(), 3).unwrap());
}
