//! Straight noise-to-data paths, the switch and the masked loss.

use ndarray::{s, Array, Dimension, Zip};
use rand::Rng;

use crate::error::{ModelError, Result};
use crate::jointface::FaceLatents;

/// `(1 - t) f + t eps`.
pub fn noisify<D: Dimension>(f: &Array<f64, D>, eps: &Array<f64, D>, t: f64) -> Result<Array<f64, D>> {
    if f.shape() != eps.shape() {
        return Err(ModelError::domain(format!("shapes {:?} and {:?} differ", f.shape(), eps.shape())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::domain(format!("timestep {t} outside [0, 1]")));
    }
    Ok(Zip::from(f).and(eps).map_collect(|&a, &e| (1.0 - t) * a + t * e))
}

/// `eps - f`.
pub fn target_velocity<D: Dimension>(f: &Array<f64, D>, eps: &Array<f64, D>) -> Result<Array<f64, D>> {
    if f.shape() != eps.shape() {
        return Err(ModelError::domain(format!("shapes {:?} and {:?} differ", f.shape(), eps.shape())));
    }
    Ok(eps - f)
}

/// Fair coin: `1` selects view conditioning, `0` text-only.
pub fn sample_switch(rng: &mut impl Rng) -> u8 {
    rng.random_bool(0.5) as u8
}

/// One training panorama on its noisy path.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBatch {
    pub clean: FaceLatents,
    pub noise: FaceLatents,
    pub t: f64,
    pub gamma: u8,
    pub cond: usize,
    /// Network input: noisy faces, with face 0 clean when `gamma == 1`.
    pub noisy: FaceLatents,
    /// Faces that contribute to the loss.
    pub mask: [bool; 6],
}

impl FlowBatch {
    pub fn new(clean: FaceLatents, noise: FaceLatents, t: f64, gamma: u8, cond: usize) -> Result<Self> {
        if gamma > 1 {
            return Err(ModelError::domain(format!("switch {gamma} is not 0 or 1")));
        }
        if clean.dim().0 != 6 {
            return Err(ModelError::domain(format!("{} faces, expected 6", clean.dim().0)));
        }
        let mut noisy = noisify(&clean, &noise, t)?;
        if gamma == 1 {
            noisy.slice_mut(s![0, .., .., ..]).assign(&clean.slice(s![0, .., .., ..]));
        }
        let mut mask = [true; 6];
        mask[0] = gamma == 0;
        Ok(FlowBatch { clean, noise, t, gamma, cond, noisy, mask })
    }

    pub fn target(&self) -> FaceLatents {
        &self.noise - &self.clean
    }
}

/// Mean over supervised faces of each face's mean squared velocity error.
pub fn flow_loss(pred: &FaceLatents, batch: &FlowBatch) -> Result<f64> {
    Ok(flow_loss_grad(pred, batch)?.0)
}

/// [`flow_loss`] and its gradient w.r.t. `pred`.
pub fn flow_loss_grad(pred: &FaceLatents, batch: &FlowBatch) -> Result<(f64, FaceLatents)> {
    if pred.dim() != batch.clean.dim() {
        return Err(ModelError::domain(format!(
            "prediction {:?} does not match faces {:?}",
            pred.dim(),
            batch.clean.dim()
        )));
    }
    let supervised = batch.mask.iter().filter(|m| **m).count() as f64;
    let per_face = (pred.len() / 6) as f64;
    let mut grad = FaceLatents::zeros(pred.dim());
    let mut loss = 0.0;
    for f in (0..6).filter(|&f| batch.mask[f]) {
        let mut g = grad.slice_mut(s![f, .., .., ..]);
        let mut sq = 0.0;
        Zip::from(&mut g)
            .and(pred.slice(s![f, .., .., ..]))
            .and(batch.noise.slice(s![f, .., .., ..]))
            .and(batch.clean.slice(s![f, .., .., ..]))
            .for_each(|g, &p, &e, &c| {
                let r = p - (e - c);
                sq += r * r;
                *g = 2.0 * r / (per_face * supervised);
            });
        loss += sq / per_face;
    }
    Ok((loss / supervised, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn faces(value: f64) -> FaceLatents {
        Array4::from_elem((6, 2, 2, 1), value)
    }

    #[test]
    fn noisify_endpoints_and_midpoint() {
        let f = Array1::from(vec![0.3, -1.2, 5.0]);
        let e = Array1::from(vec![1.7, 0.1, -2.0]);
        assert_eq!(noisify(&f, &e, 0.0).unwrap(), f);
        assert_eq!(noisify(&f, &e, 1.0).unwrap(), e);
        let mid = noisify(&Array1::zeros(4), &Array1::from_elem(4, 2.0), 0.5).unwrap();
        assert!(mid.iter().all(|v| *v == 1.0));
        assert!(noisify(&f, &Array1::zeros(2), 0.5).is_err());
        assert!(noisify(&f, &e, 1.5).is_err());
    }

    #[test]
    fn target_examples() {
        let f = Array1::from(vec![0.5, -0.5]);
        assert!(target_velocity(&f, &f).unwrap().iter().all(|v| *v == 0.0));
        let e = Array1::from(vec![3.0, 3.0]);
        assert_eq!(target_velocity(&Array1::zeros(2), &e).unwrap(), e);
        assert!(target_velocity(&Array1::ones(2), &e).unwrap().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn switch_is_fair_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ones: u32 = (0..100_000).map(|_| sample_switch(&mut rng) as u32).sum();
        let freq = ones as f64 / 1e5;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| sample_switch(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn batch_contract() {
        let b = FlowBatch::new(faces(0.5), faces(-1.0), 0.25, 1, 0).unwrap();
        assert_eq!(b.mask, [false, true, true, true, true, true]);
        assert!(b.noisy.slice(s![0, .., .., ..]).iter().all(|v| *v == 0.5));
        assert!(b.noisy.slice(s![1.., .., .., ..]).iter().all(|v| *v == 0.75 * 0.5 - 0.25));
        assert_eq!(FlowBatch::new(faces(0.5), faces(-1.0), 0.25, 0, 0).unwrap().mask, [true; 6]);
        assert!(FlowBatch::new(faces(0.5), faces(-1.0), 0.25, 2, 0).is_err());
    }

    #[test]
    fn loss_examples() {
        let b = FlowBatch::new(faces(0.2), faces(0.7), 0.4, 0, 0).unwrap();
        assert_eq!(flow_loss(&b.target(), &b).unwrap(), 0.0);

        let v = FlowBatch::new(faces(0.2), faces(0.7), 0.4, 1, 0).unwrap();
        let mut pred = v.target();
        pred.slice_mut(s![0, .., .., ..]).fill(1e6);
        assert_eq!(flow_loss(&pred, &v).unwrap(), 0.0);

        let one = FlowBatch::new(Array4::zeros((6, 1, 1, 1)), Array4::zeros((6, 1, 1, 1)), 0.5, 0, 0).unwrap();
        let mut pred = Array4::zeros((6, 1, 1, 1));
        pred[[0, 0, 0, 0]] = 1.0;
        assert!((flow_loss(&pred, &one).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let clean = Array4::from_shape_fn((6, 2, 2, 2), |(f, y, x, c)| ((f + 2 * y + 3 * x + c) as f64).sin());
        let noise = Array4::from_shape_fn((6, 2, 2, 2), |(f, y, x, c)| ((f * y + x + 5 * c) as f64).cos());
        let pred = Array4::from_shape_fn((6, 2, 2, 2), |(f, y, x, c)| ((3 * f + y * x + c) as f64).sin());
        for gamma in [0, 1] {
            let b = FlowBatch::new(clean.clone(), noise.clone(), 0.3, gamma, 0).unwrap();
            let (_, g) = flow_loss_grad(&pred, &b).unwrap();
            for idx in [[0, 0, 0, 0], [3, 1, 0, 1], [5, 1, 1, 0]] {
                let mut p = pred.clone();
                p[idx] += 1e-6;
                let lp = flow_loss(&p, &b).unwrap();
                p[idx] -= 2e-6;
                let lm = flow_loss(&p, &b).unwrap();
                assert!(((lp - lm) / 2e-6 - g[idx]).abs() < 1e-8);
            }
        }
    }
}
