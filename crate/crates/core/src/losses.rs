//! Adversarial losses with label-smoothed real targets.
//!
//! ```text
//! loss_R = MSE(D(h), 1 - 0.1 alpha)      alpha ~ U[0, 1) per element
//! loss_F = MSE(D(h_hat), 0)
//! loss_D = loss_F + loss_R
//! loss_G = MSE(h_hat, h) + 1e-3 * MSE(D(h_hat), 1)
//! ```
//!
//! For `loss_D` the fake scores must come from a detached `h_hat` (entered
//! as a constant), so no gradient reaches the generator. For `loss_G` the
//! scores are recomputed on the live `h_hat`.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const ADVERSARIAL_WEIGHT: f64 = 1e-3;
pub const LABEL_NOISE: f64 = 0.1;

/// Smoothed real targets `1 - 0.1 alpha` of shape `(n, 1, h, w)`, with a
/// fresh `alpha` per element. Every value lies in `(0.9, 1.0]`.
pub fn real_targets<T: Scalar>(n: usize, h: usize, w: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let alpha = Tensor::<T>::uniform(&[n, 1, h, w], 0.0, 1.0, rng)?;
    Ok(targets_from_alpha(&alpha))
}

pub fn targets_from_alpha<T: Scalar>(alpha: &Tensor<T>) -> Tensor<T> {
    alpha.scalar_mul(T::of(-LABEL_NOISE)).scalar_add(T::one())
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport<T = f32> {
    pub loss_d: T,
    pub loss_f: T,
    pub loss_r: T,
    pub loss_g: T,
    pub loss_g_content: T,
    pub loss_g_adv: T,
}

impl<T: Scalar> LossReport<T> {
    pub fn all_finite(&self) -> bool {
        [
            self.loss_d,
            self.loss_f,
            self.loss_r,
            self.loss_g,
            self.loss_g_content,
            self.loss_g_adv,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorLoss {
    pub loss_d: Var,
    pub loss_r: Var,
    pub loss_f: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub loss_g: Var,
    pub content: Var,
    pub adversarial: Var,
}

pub fn discriminator_loss<T: Scalar>(
    g: &mut Graph<T>,
    d_real: Var,
    d_fake: Var,
    targets: Var,
) -> Result<DiscriminatorLoss> {
    let loss_r = g.mse(d_real, targets)?;
    let zeros = g.constant(g.value(d_fake).zeros_like());
    let loss_f = g.mse(d_fake, zeros)?;
    let loss_d = g.add(loss_f, loss_r)?;
    Ok(DiscriminatorLoss {
        loss_d,
        loss_r,
        loss_f,
    })
}

/// Generator loss with the adversarial term scaled by `adv_weight`
/// ([`ADVERSARIAL_WEIGHT`] in normal training).
pub fn generator_loss<T: Scalar>(
    g: &mut Graph<T>,
    h_hat: Var,
    h: Var,
    d_fake: Var,
    adv_weight: f64,
) -> Result<GeneratorLoss> {
    let content = g.mse(h_hat, h)?;
    let ones = g.constant(Tensor::full(g.value(d_fake).shape(), T::one())?);
    let adversarial = g.mse(d_fake, ones)?;
    let scaled = g.scalar_mul(adversarial, T::of(adv_weight));
    let loss_g = g.add(content, scaled)?;
    Ok(GeneratorLoss {
        loss_g,
        content,
        adversarial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn t(v: f64, shape: &[usize]) -> Tensor<f64> {
        Tensor::full(shape, v).unwrap()
    }

    fn d_loss(real: f64, fake: f64, target: f64) -> (f64, f64, f64) {
        let mut g = Graph::<f64>::new();
        let s = [2, 1, 3, 3];
        let (r, f, tg) = (g.constant(t(real, &s)), g.constant(t(fake, &s)), g.constant(t(target, &s)));
        let l = discriminator_loss(&mut g, r, f, tg).unwrap();
        let v = |x: Var| g.value(x).item().unwrap();
        (v(l.loss_d), v(l.loss_r), v(l.loss_f))
    }

    #[test]
    fn discriminator_cases() {
        assert_eq!(d_loss(0.95, 0.0, 0.95).0, 0.0);
        assert_eq!(d_loss(0.0, 1.0, 1.0), (2.0, 1.0, 1.0));
        let (d, r, f) = d_loss(0.9, 0.5, 0.9);
        assert!((d - 0.25).abs() < 1e-12 && r == 0.0 && f == 0.25);
    }

    fn g_loss(diff: f64, fake: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let s = [1, 3, 4, 4];
        let hh = g.constant(t(diff, &s));
        let h = g.constant(t(0.0, &s));
        let df = g.constant(t(fake, &[1, 1, 4, 4]));
        let l = generator_loss(&mut g, hh, h, df, ADVERSARIAL_WEIGHT).unwrap();
        g.value(l.loss_g).item().unwrap()
    }

    #[test]
    fn generator_cases() {
        assert_eq!(g_loss(0.0, 1.0), 0.0);
        assert!((g_loss(0.0, 0.0) - 0.001).abs() < 1e-15);
        // A uniform difference of 0.5 gives content MSE 0.25.
        assert!((g_loss(0.5, 0.5) - 0.25025).abs() < 1e-12);
    }

    #[test]
    fn target_extremes() {
        let a0 = Tensor::<f64>::zeros(&[1, 1, 2, 2]).unwrap();
        assert!(targets_from_alpha(&a0).data().iter().all(|&v| v == 1.0));
        let a1 = Tensor::<f64>::ones(&[1, 1, 2, 2]).unwrap();
        assert!(targets_from_alpha(&a1).data().iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn sampled_targets_in_range(seed: u64) {
            let t = real_targets::<f32>(2, 8, 8, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(t.shape(), &[2, 1, 8, 8]);
            prop_assert!(t.min_value() > 0.9 && t.max_value() <= 1.0);
        }

        #[test]
        fn decomposition_is_exact(seed: u64) {
            let mut rng = Rng::new(seed);
            let mut g = Graph::<f32>::new();
            let s = [2, 1, 4, 4];
            let r = g.constant(Tensor::uniform(&s, 0.0, 1.0, &mut rng).unwrap());
            let f = g.constant(Tensor::uniform(&s, 0.0, 1.0, &mut rng).unwrap());
            let tg = g.constant(real_targets(2, 4, 4, &mut rng).unwrap());
            let l = discriminator_loss(&mut g, r, f, tg).unwrap();
            let v = |x: Var| g.value(x).item().unwrap();
            prop_assert_eq!(v(l.loss_d), v(l.loss_f) + v(l.loss_r));
            prop_assert!(v(l.loss_d) >= 0.0);
        }
    }
}
