//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], beta1: f64, beta2: f64) -> Result<Self> {
        Ok(AdamState {
            m: Tensor::zeros(shape)?,
            v: Tensor::zeros(shape)?,
            t: 0,
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(DEFAULT_EPSILON),
        })
    }

    /// One update of `param` in place:
    ///
    /// ```text
    /// m <- b1 m + (1 - b1) g
    /// v <- b2 v + (1 - b2) g^2
    /// param <- param - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    ///
    /// A non-finite gradient is rejected before anything is modified.
    pub fn step(&mut self, param: &mut Tensor<T>, grad: &Tensor<T>, lr: T) -> Result<()> {
        param.expect_same_shape(grad)?;
        self.m.expect_same_shape(grad)?;
        if !(lr > T::zero()) {
            return Err(Error::Range(format!("learning rate {lr} must be positive")));
        }
        if let Some(pos) = grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "gradient element {pos} is {} at Adam step {}",
                grad.data()[pos],
                self.t + 1
            )));
        }
        self.t += 1;
        let one = T::one();
        let (b1, b2) = (self.beta1, self.beta2);
        let exponent = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = one - b1.powi(exponent);
        let c2 = one - b2.powi(exponent);
        for (((p, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(self.m.data_mut())
            .zip(self.v.data_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adam over every parameter of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64) -> Result<Self> {
        let states = store
            .iter()
            .map(|p| AdamState::new(p.value.shape(), beta1, beta2))
            .collect::<Result<_>>()?;
        Ok(Adam { states })
    }

    /// Applies one step to every parameter from its accumulated gradient.
    /// All gradients are checked first so a divergence leaves the store
    /// untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.states.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.states.len(),
                store.len()
            )));
        }
        for p in store.iter() {
            if !p.grad.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for parameter {}",
                    p.name
                )));
            }
        }
        let lr = T::of(lr);
        for (state, p) in self.states.iter_mut().zip(store.iter_mut()) {
            state.step(&mut p.value, &p.grad, lr)?;
        }
        Ok(())
    }
}
