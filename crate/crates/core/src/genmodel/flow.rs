use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{Condition, LatentPair, ModelInput, VelocityModel};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Anything that predicts a velocity for a noisy latent.
pub trait VelocityField {
    fn velocity(&self, x: &LatentPair, cond: &Condition, t: f64) -> Result<LatentPair>;
}

impl VelocityField for VelocityModel {
    fn velocity(&self, x: &LatentPair, cond: &Condition, t: f64) -> Result<LatentPair> {
        Ok(self.velocity_batch(&[ModelInput { x_t: x, cond, t }])?.pop().expect("one output per input"))
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 − t)·x0 + t·x1`.
pub fn fm_interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    check_t(t)?;
    x0.zip_map(x1, |a, b| ((1.0 - t) * a as f64 + t * b as f64) as f32)
}

pub(crate) fn interpolate_pair(x0: &LatentPair, x1: &LatentPair, t: f64) -> Result<LatentPair> {
    LatentPair::new(fm_interpolate(&x0.rgb, &x1.rgb, t)?, fm_interpolate(&x0.xyz, &x1.xyz, t)?)
}

/// Mean squared error between the predicted velocity at `x_t` and `x1 − x0`.
pub fn fm_loss(model: &impl VelocityField, x1: &LatentPair, cond: &Condition, t: f64, x0: &LatentPair) -> Result<f64> {
    let x_t = interpolate_pair(x0, x1, t)?;
    let u = model.velocity(&x_t, cond, t)?;
    if !u.all_finite() {
        return Err(Error::NonFinite("model output".into()));
    }
    if u.shape() != x1.shape() {
        return Err(Error::shape(format!("velocity {:?} vs latent {:?}", u.shape(), x1.shape())));
    }
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for (pred, (a, b)) in [(&u.rgb, (&x1.rgb, &x0.rgb)), (&u.xyz, (&x1.xyz, &x0.xyz))] {
        for ((&p, &x1v), &x0v) in pred.data().iter().zip(a.data()).zip(b.data()) {
            let e = p as f64 - (x1v as f64 - x0v as f64);
            acc += e * e;
        }
        n += pred.numel();
    }
    Ok(acc / n as f64)
}

/// Standard normal latent pair drawn from `rng`.
pub fn noise_from(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<LatentPair> {
    let mut draw = || Tensor::from_fn(shape, |_| StandardNormal.sample(rng));
    let rgb = draw()?;
    let xyz = draw()?;
    LatentPair::new(rgb, xyz)
}

/// The starting noise [`sample`] uses for `seed`.
pub fn noise(shape: &[usize], seed: u64) -> Result<LatentPair> {
    noise_from(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

pub const DEFAULT_SAMPLE_STEPS: usize = 50;

/// Euler integration of the velocity field from noise at `t = 0` to `t = 1`.
pub fn sample(model: &impl VelocityField, cond: &Condition, steps: usize, seed: u64) -> Result<LatentPair> {
    if steps == 0 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    let mut x = noise(cond.image.shape(), seed)?;
    let mut state: Vec<Vec<f64>> =
        [&x.rgb, &x.xyz].iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = model.velocity(&x, cond, t)?;
        if u.shape() != x.shape() {
            return Err(Error::shape("velocity shape differs from the latent"));
        }
        for (s, v) in state.iter_mut().zip([&u.rgb, &u.xyz]) {
            for (a, &b) in s.iter_mut().zip(v.data()) {
                *a += dt * b as f64;
            }
        }
        let shape = x.shape().to_vec();
        let to_tensor = |s: &[f64]| Tensor::new(shape.clone(), s.iter().map(|&v| v as f32).collect());
        x = LatentPair::new(to_tensor(&state[0])?, to_tensor(&state[1])?)?;
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("sampler state at step {}", k + 1)));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(LatentPair);
    impl VelocityField for Constant {
        fn velocity(&self, _: &LatentPair, _: &Condition, _: f64) -> Result<LatentPair> {
            Ok(self.0.clone())
        }
    }

    struct Zero;
    impl VelocityField for Zero {
        fn velocity(&self, x: &LatentPair, _: &Condition, _: f64) -> Result<LatentPair> {
            LatentPair::zeros(x.shape())
        }
    }

    /// Returns `x + t` so single steps are easy to unroll.
    struct Affine;
    impl VelocityField for Affine {
        fn velocity(&self, x: &LatentPair, _: &Condition, t: f64) -> Result<LatentPair> {
            x.zip_map(x, |a, _| a + t as f32)
        }
    }

    fn cond(shape: &[usize]) -> Condition {
        Condition {
            image: LatentPair::zeros(shape).unwrap(),
            mask_rgb: Tensor::zeros(&[shape[0], 1, shape[2], shape[3]]).unwrap(),
            mask_xyz: Tensor::zeros(&[shape[0], 1, shape[2], shape[3]]).unwrap(),
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let a = Tensor::full(&[3], 0.0f32).unwrap();
        let b = Tensor::full(&[3], 2.0f32).unwrap();
        assert_eq!(fm_interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(fm_interpolate(&a, &b, 1.0).unwrap(), b);
        assert_eq!(fm_interpolate(&a, &b, 0.5).unwrap().data(), &[1.0; 3]);
        assert!(fm_interpolate(&a, &Tensor::zeros(&[4]).unwrap(), 0.5).is_err());
        assert!(fm_interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn loss_of_mock_models() {
        let shape = [1, 2, 2, 2];
        let x0 = noise(&shape, 1).unwrap();
        let x1 = noise(&shape, 2).unwrap();
        let v = x1.zip_map(&x0, |a, b| a - b).unwrap();
        let c = cond(&shape);
        assert!(fm_loss(&Constant(v.clone()), &x1, &c, 0.3, &x0).unwrap() < 1e-12);
        let expected: f64 = [(&x1.rgb, &x0.rgb), (&x1.xyz, &x0.xyz)]
            .iter()
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / 16.0;
        assert!((fm_loss(&Zero, &x1, &c, 0.3, &x0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_field_reaches_target() {
        let shape = [1, 2, 2, 2];
        let x1 = noise(&shape, 9).unwrap();
        let x0 = noise(&shape, 4).unwrap();
        let field = Constant(x1.zip_map(&x0, |a, b| a - b).unwrap());
        for steps in [1, 7, 50] {
            let out = sample(&field, &cond(&shape), steps, 4).unwrap();
            assert!(out.max_abs_diff(&x1).unwrap() < 1e-5, "{steps}");
        }
    }

    #[test]
    fn single_step_unrolled() {
        let shape = [1, 1, 2, 2];
        let x0 = noise(&shape, 3).unwrap();
        let out = sample(&Affine, &cond(&shape), 1, 3).unwrap();
        let expected = x0.zip_map(&x0, |a, _| a + a).unwrap();
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-6);
    }

    #[test]
    fn sampling_is_deterministic() {
        let shape = [1, 1, 2, 2];
        let a = sample(&Affine, &cond(&shape), 5, 11).unwrap();
        let b = sample(&Affine, &cond(&shape), 5, 11).unwrap();
        assert_eq!(a, b);
        assert!(sample(&Affine, &cond(&shape), 0, 11).is_err());
    }
}
